import sys

from kgneg.cli import main

sys.exit(main())
