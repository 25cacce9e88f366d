import sys

from graphsum.cli import main

sys.exit(main())
