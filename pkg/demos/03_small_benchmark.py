"""Run a miniature benchmark on two-curves: every arm gets a small
evaluation budget, then the report files are written to ./demo_run.

    python demos/03_small_benchmark.py
"""
from pathlib import Path

from pqcsearch.harness import BenchmarkConfig, emit_report, run_pipeline

config = BenchmarkConfig(
    dataset="two_curves",
    budget=60,
    hyperopt_trials=6,
    mcts_simulations=10,
    ga_population=8,
    kta_budget=20,
    out_dir="demo_run",
)
report = run_pipeline(config)

print(f"{'method':16s} {'best CV':>8s} {'tuned CV':>9s} {'test':>6s}  chosen circuit")
for m in report.methods:
    best = m.candidates[0]["cv_score"] if m.candidates else float("nan")
    chosen = m.chosen_circuit or "-"
    if len(chosen) > 40:
        chosen = chosen[:37] + "..."
    print(f"{m.method:16s} {best:8.3f} {m.tuned_cv_score:9.3f} {m.test_score:6.3f}  {chosen}")
print("test-split reads before the final step:", report.leakage["reads_before_final"])

files = emit_report(report, Path(config.out_dir))
print("wrote", ", ".join(sorted(Path(p).name for p in files.values())))
