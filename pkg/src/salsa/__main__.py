import sys

from salsa.cli import main

sys.exit(main())
