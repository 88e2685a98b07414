import sys

from bimcore.cli import main

sys.exit(main())
