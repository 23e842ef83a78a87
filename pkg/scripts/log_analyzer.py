#!/usr/bin/env python3
"""
Log Analyzer for experiment logs

Summarizes the per-module log files (tensor, spectral, certificate, flow,
simulation, chain, cli, error): message counts by bracketed tag, run outcomes
and the most recent errors.
"""

import re
from datetime import datetime, timedelta
from collections import Counter, defaultdict
import argparse
from pathlib import Path

MODULE_LOGS = ["tensor", "spectral", "certificate", "flow", "simulation", "chain", "cli"]
TAG_PATTERN = re.compile(r"^\[([A-Z_]+)\]")


class LogAnalyzer:
    def __init__(self, logs_dir="logs"):
        self.logs_dir = Path(logs_dir)

    def parse_log_line(self, line):
        """Parse a log line and extract timestamp, level and message."""
        # Expected format: 2024-01-01 12:00:00,123 - INFO - logger_name - MESSAGE
        parts = line.strip().split(" - ", 3)
        if len(parts) < 4:
            return None, None, None
        try:
            timestamp = datetime.strptime(parts[0], "%Y-%m-%d %H:%M:%S,%f")
        except ValueError:
            return None, None, None
        return timestamp, parts[1], parts[3]

    def read_entries(self, name, hours):
        path = self.logs_dir / f"{name}.log"
        if not path.exists():
            return []
        cutoff_time = datetime.now() - timedelta(hours=hours)
        entries = []
        with open(path, "r") as f:
            for line in f:
                timestamp, level, message = self.parse_log_line(line)
                if timestamp and timestamp >= cutoff_time:
                    entries.append((timestamp, level, message))
        return entries

    def analyze_modules(self, hours=24):
        """Message counts per module log, split by tag."""
        print(f"\n=== Module Activity (Last {hours} hours) ===")
        for name in MODULE_LOGS:
            tags = Counter()
            for _, _, message in self.read_entries(name, hours):
                match = TAG_PATTERN.match(message)
                tags[match.group(1) if match else "untagged"] += 1
            if not tags:
                continue
            print(f"{name}: {sum(tags.values())} messages")
            for tag, count in tags.most_common(8):
                print(f"  {tag}: {count}")

    def analyze_runs(self, hours=24):
        """Manifest writes per experiment kind and rejected configs."""
        print(f"\n=== Runs (Last {hours} hours) ===")
        by_kind = defaultdict(int)
        rejected = 0
        reruns = 0
        for _, _, message in self.read_entries("cli", hours):
            if message.startswith("[MANIFEST]"):
                kind = re.search(r"kind=(\S+)", message)
                by_kind[kind.group(1) if kind else "unknown"] += 1
            elif message.startswith("[CONFIG] rejected"):
                rejected += 1
            elif message.startswith("[RERUN]"):
                reruns += 1
        print(f"Runs completed: {sum(by_kind.values())}")
        print(f"Configs rejected: {rejected}")
        print(f"Reruns: {reruns}")
        for kind, count in sorted(by_kind.items()):
            print(f"  {kind}: {count}")

    def recent_errors(self, hours=24, limit=5):
        print(f"\n=== Recent Errors (Last {hours} hours) ===")
        entries = self.read_entries("error", hours)
        if not entries:
            print("none")
            return
        for timestamp, _, message in entries[-limit:]:
            print(f"  {timestamp}: {message[:100]}")

    def generate_report(self, hours=24):
        """Generate a comprehensive report."""
        print(f"Log Analysis Report - Last {hours} hours")
        print("=" * 50)
        self.analyze_runs(hours)
        self.analyze_modules(hours)
        self.recent_errors(hours)


def main():
    parser = argparse.ArgumentParser(description="Analyze experiment logs")
    parser.add_argument("--hours", type=int, default=24,
                        help="Number of hours to analyze (default: 24)")
    parser.add_argument("--logs-dir", default="logs",
                        help="Logs directory (default: logs)")
    parser.add_argument("--report", action="store_true",
                        help="Generate comprehensive report")

    args = parser.parse_args()

    analyzer = LogAnalyzer(args.logs_dir)

    if args.report:
        analyzer.generate_report(args.hours)
    else:
        analyzer.analyze_runs(args.hours)
        analyzer.recent_errors(args.hours)


if __name__ == "__main__":
    main()
