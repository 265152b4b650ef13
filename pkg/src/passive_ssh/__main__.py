import sys

from passive_ssh.cli import main

sys.exit(main())
