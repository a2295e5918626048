import sys

from m6cast.cli import main

sys.exit(main())
