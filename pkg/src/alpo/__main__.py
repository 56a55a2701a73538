import sys

from alpo.cli import main

sys.exit(main())
