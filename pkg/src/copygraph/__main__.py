import sys

from copygraph.cli import main

sys.exit(main())
