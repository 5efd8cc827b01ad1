"""Top level code."""
import sys

from graspgen.application import main

sys.exit(main())
