"""Schedule-driven generation from the fully-masked prior.

Walks a reverse schedule from everything-masked to a complete sequence,
committing high-confidence candidates first, and shows the count-exact
unmasking targets for linear and cosine ladders.

Run:  python3 demos/04_sampling.py
"""

from celldiff.denoiser import Denoiser, ModelConfig
from celldiff.sampler import Schedule, generate, target_masked_count

model = Denoiser(ModelConfig.tiny(vocab_size=40), seed=0)
length = 8

for name, schedule in (("linear", Schedule.linear(4)),
                       ("cosine", Schedule.cosine(4))):
    levels = list(reversed(schedule.times))
    targets = [target_masked_count(t, length) for t in levels[1:]]
    result = generate(model, length, schedule, seed=1)
    print(f"{name} schedule, {schedule.n_steps} steps")
    print(f"  levels  {[round(t, 3) for t in levels]}")
    print(f"  targets {targets}")
    print(f"  masked  {result.masked_after_step}")
    print(f"  tokens  {result.tokens.tolist()}")
    print(f"  values  {[round(v, 2) for v in result.values.tolist()]}\n")

result = generate(model, length, Schedule.linear(8), seed=2, argmax=True)
print(f"argmax mode, 8 steps: tokens {result.tokens.tolist()}")
