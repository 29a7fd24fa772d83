import sys

from drmean.cli import main

sys.exit(main())
