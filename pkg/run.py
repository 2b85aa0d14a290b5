#!/usr/bin/env python
"""
Simple script to run the texroi pipeline with proper configuration.

    python run.py synth --subjects 40 --effect-cell 12 --out corpus
    python run.py preprocess --manifest corpus/manifest.csv --out work
    python run.py rank-regions --out work
"""
import sys

if __name__ == "__main__":
    # Load .env if it exists
    try:
        from dotenv import load_dotenv
        load_dotenv()
    except ImportError:
        print("[WARNING] python-dotenv not found, using default settings", file=sys.stderr)

    from app import main

    sys.exit(main())
