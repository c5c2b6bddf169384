import sys

from szloca.cli import main

sys.exit(main())
