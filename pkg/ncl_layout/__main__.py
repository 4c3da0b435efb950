from .ncl_layout import main

if __name__ == "__main__":
    main()
