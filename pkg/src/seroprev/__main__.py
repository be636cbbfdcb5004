import sys

from seroprev.cli import main

sys.exit(main())
