import sys

from gicaps.cli import main

sys.exit(main())
