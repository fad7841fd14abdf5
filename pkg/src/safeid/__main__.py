import sys

from safeid.harness.cli import main

sys.exit(main())
