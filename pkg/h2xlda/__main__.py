import sys

from h2xlda.cli import main

sys.exit(main())
