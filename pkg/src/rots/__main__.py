from rots.cli import main

raise SystemExit(main())
