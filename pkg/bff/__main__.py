import sys

from bff.main import main

sys.exit(main())
