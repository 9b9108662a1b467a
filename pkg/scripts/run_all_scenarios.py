"""Run every pinned scenario in configs/ and write its report under out/<name>/."""
import argparse
import sys
import time
from pathlib import Path

from attnlab.experiments import ScenarioConfig, all_checks_pass, run_scenario, write_result

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--configs", type=Path, default=ROOT / "configs")
    p.add_argument("--out", type=Path, default=ROOT / "out")
    p.add_argument("--only", nargs="*", help="config names to run (default: all)")
    args = p.parse_args(argv)

    paths = sorted(args.configs.glob("*.json"))
    if args.only:
        paths = [q for q in paths if q.stem in args.only]
    failed = []
    for path in paths:
        cfg = ScenarioConfig.load(path)
        t0 = time.perf_counter()
        result = run_scenario(cfg)
        write_result(result, cfg, args.out / cfg.name)
        ok = all_checks_pass(result.report)
        print(f"{'PASS' if ok else 'FAIL'}  {cfg.name:<18} {time.perf_counter() - t0:7.1f} s")
        for name, check in sorted(result.report["checks"].items()):
            print(f"      {'ok  ' if check['passes'] else 'FAIL'} {name}")
        if not ok:
            failed.append(cfg.name)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
