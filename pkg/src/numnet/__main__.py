import sys

from numnet.cli import main

sys.exit(main())
