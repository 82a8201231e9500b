from gapforge.cli import main
import sys
sys.exit(main())
