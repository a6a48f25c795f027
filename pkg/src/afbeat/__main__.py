import sys

from afbeat.cli import main

sys.exit(main())
