import sys

from cpopt.harness.cli import main

sys.exit(main())
