import sys

from opscore.main import main

sys.exit(main())
