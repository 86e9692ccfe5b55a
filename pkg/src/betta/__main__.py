import sys

from betta.cli import main

sys.exit(main())
