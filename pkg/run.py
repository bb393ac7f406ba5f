#!/usr/bin/env python3
"""
Launcher script for the FDN benchmark
"""

import os
import sys
import glob
import subprocess

from dotenv import load_dotenv

load_dotenv()

SMOKE_CONFIG = os.path.join("configs", "smoke_suite.json")
DESK_CONFIG = os.path.join("configs", "desk_suite.json")


def show_menu():
    """Display the main menu."""
    print("🚀 FDN Benchmark Launcher")
    print("=" * 40)
    print("1. Run Test Scripts")
    print("2. Gradient Check")
    print("3. Smoke Suite")
    print("4. Full Suite")
    print("5. Acceptance Check")
    print("6. View Logs")
    print("7. Exit")
    print("=" * 40)


def run_test_scripts():
    """Run every test_*.py script and report which ones failed."""
    failed = []
    for script in sorted(glob.glob("test_*.py")):
        print(f"🧪 Running {script}...")
        if subprocess.run([sys.executable, script]).returncode != 0:
            failed.append(script)
    if failed:
        print(f"❌ Failed: {', '.join(failed)}")
    else:
        print("✅ All test scripts passed")
    return not failed


def benchmark(*args):
    try:
        return subprocess.run([sys.executable, "fdn_benchmark.py", *args]).returncode == 0
    except KeyboardInterrupt:
        print("\n⏹️  Stopped by user")
        return False


def view_logs(tail: int = 20):
    """Print the last `tail` log lines, then any ERROR lines from the whole file."""
    log_file = os.getenv("FDN_LOG_FILE", "fdn_benchmark.log")
    if not os.path.exists(log_file):
        print(f"📋 {log_file} does not exist yet; it appears after the first run.")
        return
    try:
        with open(log_file, 'r') as f:
            lines = [line.rstrip() for line in f]
    except OSError as e:
        print(f"❌ Cannot read {log_file}: {e}")
        return
    print(f"📋 Last {min(tail, len(lines))} lines of {log_file}:")
    print("-" * 50)
    print("\n".join(lines[-tail:]))
    errors = [line for line in lines if " - ERROR - " in line]
    if errors:
        print(f"\n❌ {len(errors)} failed run(s) logged:")
        print("\n".join(errors[-5:]))


def main():
    """Main launcher function."""
    while True:
        show_menu()
        choice = input("Select an option (1-7): ").strip()

        if choice == "1":
            run_test_scripts()
        elif choice == "2":
            benchmark("gradcheck")
        elif choice == "3":
            benchmark("suite", "--config", SMOKE_CONFIG)
        elif choice == "4":
            benchmark("suite", "--jobs", os.getenv("FDN_JOBS", "1"))
        elif choice == "5":
            benchmark("accept", "--config", DESK_CONFIG, "--jobs", os.getenv("FDN_JOBS", "1"))
        elif choice == "6":
            view_logs()
        elif choice == "7":
            print("👋 Goodbye!")
            break
        else:
            print("❌ Invalid option. Please select 1-7.")

        input("\nPress Enter to continue...")


if __name__ == "__main__":
    main()
