"""Quick check that the extension module loads and runs end to end."""

import jamcast

cfg = jamcast.Config(n=64, seed=3)
print(cfg)
print("budgets", cfg.budgets())
print("round 1", cfg.schedule(1))

r = jamcast.run_trial(cfg)
print(r)
assert r.informed_frac == 1.0
assert r.conservation_ok
again = jamcast.run_trial(jamcast.Config(n=64, seed=3))
assert again.to_dict() == r.to_dict()

results, summary = jamcast.run_experiment(
    {"n": 64, "trials": 2, "sweep.adversary.stop_round": "1..3", "adversary.strategy": "phase_blocker"}, parallelism=2
)
assert len(results) == 6 and len(summary["cells"]) == 3
header = jamcast.emit_csv(results).splitlines()[0]
assert header.startswith("seed,n,f,k,epsilon_prime,strategy,T,"), header

fit = jamcast.competitiveness_fit([(8.0, 2.0, 4.0), (64.0, 4.0, 8.0), (512.0, 8.0, 16.0), (4096.0, 16.0, 32.0)])
assert abs(fit["node"]["slope"] - 1 / 3) < 1e-12

cases, bad = jamcast.oracle_check()
assert bad == 0, bad
assert jamcast.oracle_check(3, inject_fault=True)[1] > 0

out = dict(jamcast.resolve_slot([(0, "m")], [], [1, 2]))
assert out == {1: "m+auth", 2: "m+auth"}, out
out = dict(jamcast.resolve_slot([(0, "m")], [(9, [1])], [1, 2]))
assert out == {1: "noise", 2: "m+auth"}, out

try:
    jamcast.Config(n=0)
except ValueError as e:
    print("rejected:", e)
else:
    raise AssertionError("n=0 accepted")

print("ok")
