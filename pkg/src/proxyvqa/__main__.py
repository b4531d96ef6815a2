import sys

from proxyvqa.cli import main

sys.exit(main())
