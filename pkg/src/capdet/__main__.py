from capdet.cli import main

main()
