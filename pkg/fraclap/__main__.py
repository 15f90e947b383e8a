# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

import sys

from fraclap.cli import main

sys.exit(main())
