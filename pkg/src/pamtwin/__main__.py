from pamtwin.cli import main
import sys

sys.exit(main())
