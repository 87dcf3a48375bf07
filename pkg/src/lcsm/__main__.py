import sys

from lcsm.cli import main

sys.exit(main())
