from dataclasses import dataclass


@dataclass
class EnvConfig:
    episode_len: int = 288
    step_minutes: int = 5
    cooldown_steps: int = 40
    outage_steps: int = 16
    soft_overflow_limit: float = 1.0
    hard_overflow_limit: float = 1.35
    soft_overflow_patience: int = 4
    balance_redundancy: float = 5.0  # MW
    balance_hard_upper: float = 1.10
    balance_hard_lower: float = 0.90
    # overflow, renewable, balance, cost, reactive, voltage
    reward_weights: tuple = (1.0, 2.0, 4.0, 1.0, 1.0, 1.0)
    cost_normalizer: float = 1e5
    forecast_noise_std: float = 0.0
    penalty_clip: float = 0.1
    terminal_reward: float = -10.0
    pf_tol: float = 1e-8
    pf_max_iter: int = 20

    def __post_init__(self):
        problems = []
        if self.episode_len <= 0:
            problems.append("episode_len must be positive")
        if self.hard_overflow_limit <= self.soft_overflow_limit:
            problems.append("hard_overflow_limit must exceed soft_overflow_limit")
        if self.balance_redundancy <= 0:
            problems.append("balance_redundancy must be positive")
        if len(self.reward_weights) != 6:
            problems.append("reward_weights needs six entries")
        if self.penalty_clip <= 0:
            problems.append("penalty_clip must be positive")
        if problems:
            raise ValueError("; ".join(problems))
        self.reward_weights = tuple(float(w) for w in self.reward_weights)

    @property
    def steps_per_day(self):
        return 24 * 60 // self.step_minutes


REWARD_NAMES = ("overflow", "renewable", "balance", "cost", "reactive", "voltage")

