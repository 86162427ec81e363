from roughmdp.cli import main

main()
