import sys

from decoyqkd.cli import main

sys.exit(main())
