import sys

from sectorgen.cli import main

sys.exit(main())
