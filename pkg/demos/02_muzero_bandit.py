"""Train the MuZero agent on a one-step bandit with 43 arms where only arm 17
pays out, and watch the search policy concentrate on it.

    python demos/02_muzero_bandit.py
"""
from pqcsearch.muzero import BanditEnv, MuZeroAgent, MuZeroConfig, run_mcts

agent = MuZeroAgent(MuZeroConfig(seed=0))
env = BanditEnv(arm=17)

for episode in range(1, 401):
    agent.self_play_episode(env, temperature=1.0)
    agent.train_step()
    if episode % 50 == 0:
        policy, value, _ = run_mcts(agent.nets, env.reset(), agent.config.n_simulations)
        best = int(policy.argmax())
        print(f"episode {episode:4d}: visit share of arm 17 = {policy[17]:.2f}, "
              f"most visited arm = {best}, root value = {value:.2f}")
        if policy[17] >= 0.9:
            print("solved")
            break
