import sys

from mdpcfl.cli import main

sys.exit(main())
