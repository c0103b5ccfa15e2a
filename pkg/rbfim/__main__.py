import sys

from rbfim.cli import main

sys.exit(main())
