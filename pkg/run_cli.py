import sys

from app.main import main

if __name__ == "__main__":
    print("🚀 Few-shot diffusion adaptation CLI")
    print("🔧 Subcommands: gen-data, pretrain, adapt, sample, geolab, metrics (use --help on each)")
    sys.exit(main())
