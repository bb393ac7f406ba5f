#!/usr/bin/env python3
"""
Setup script for the FDN benchmark
Installs the pinned requirements, writes .env from env_example.txt, prepares
the output directory and runs the environment check.
"""

import os
import shutil
import subprocess
import sys

ENV_TEMPLATE = 'env_example.txt'


def pip_install(requirements: str = 'requirements.txt') -> bool:
    print(f"📦 Installing {requirements}...")
    code = subprocess.call([sys.executable, "-m", "pip", "install", "-r", requirements])
    if code != 0:
        print(f"❌ pip exited with status {code}")
        return False
    print("✅ Requirements installed")
    return True


def write_env(path: str = '.env') -> bool:
    """Copy the documented defaults to .env unless one is already there."""
    if os.path.exists(path):
        print(f"⚠️  {path} already exists, leaving it untouched")
        return True
    try:
        shutil.copyfile(ENV_TEMPLATE, path)
    except OSError as e:
        print(f"❌ Cannot write {path}: {e}")
        return False
    print(f"✅ Wrote {path} from {ENV_TEMPLATE}")
    return True


def prepare_output_dir() -> str:
    from dotenv import dotenv_values

    output_dir = dotenv_values('.env').get('FDN_OUTPUT_DIR') or 'out'
    os.makedirs(output_dir, exist_ok=True)
    print(f"✅ Output directory ready: {output_dir}")
    return output_dir


def main():
    print("🚀 Setting up the FDN benchmark")
    print("=" * 50)

    if not (pip_install() and write_env()):
        sys.exit(1)
    prepare_output_dir()

    print("\n🧪 Checking the environment...")
    if subprocess.call([sys.executable, "test_setup.py"]) != 0:
        sys.exit(1)

    print("\n📋 Next steps:")
    print("1. python fdn_benchmark.py gradcheck")
    print("2. python fdn_benchmark.py run --seed 7")
    print("3. python fdn_benchmark.py suite --config configs/smoke_suite.json")
    print("\n📖 See README.md for the config format and outputs")


if __name__ == "__main__":
    main()
