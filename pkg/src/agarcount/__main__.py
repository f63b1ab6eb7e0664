from agarcount.cli import main

main()
