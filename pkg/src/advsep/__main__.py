import sys

from .exphar.cli import main

sys.exit(main())
