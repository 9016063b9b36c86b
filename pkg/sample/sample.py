import logging

from proplab import (
    BaselineKind,
    FitConfig,
    HdpParams,
    LearningParams,
    ModelParams,
    RewardFunction,
    SimConfig,
    aggregate_runs,
    feedback_response_curve,
    fit,
    generate_synthetic_log,
    predict_next,
    stick_breaking,
    training_fraction_sweep,
)
from proplab.evaluation import BaselinePredictor, ModelPredictor
from proplab.simulation import run_repetitions

logging.basicConfig(level=logging.INFO)

# Set the parameters the synthetic users follow
params = ModelParams(
    hdp=HdpParams(alpha0=2.0, popularity=stick_breaking(1.0, 20, rng_seed=0)),
    learning=LearningParams(phi=0.1, epsilon=0.2),
    reward=RewardFunction(w_replies=1.0, w_votes=0.5),
)

##########################
# Generate activity
##########################
log = generate_synthetic_log(params, n_users=50, actions_per_user=40, rng_seed=1)
print("Users:", len(log.users), "Actions:", len(log))
print()

print("Return rate after replies:")
for bucket in feedback_response_curve(log):
    print(" ", bucket.label, bucket.n_events, bucket.relative_increase)
print()

##########################
# Fit the model
##########################
# the log was generated with the default reply cap of 1
result = fit(log, FitConfig(n_samples=400, burn_in=100, reply_cap=1.0))
print("MAP parameters:", result.map_params.values())
print("Acceptance rates:", result.diagnostics)
print()

user = log.users[0]
print("Next community of", user)
for community, prob in sorted(
    predict_next(result, log.history(user), user=user).as_dict().items(),
    key=lambda item: -item[1],
)[:5]:
    print(" ", community, round(prob, 3))
print()

##########################
# Compare against baselines
##########################
# the model is refit on every training window
predictors = [ModelPredictor(fit_config=FitConfig(n_samples=200, burn_in=50, reply_cap=1.0))] + [
    BaselinePredictor(kind) for kind in BaselineKind
]
sweep = training_fraction_sweep(log, [0.25, 0.5, 1.0], predictors)
print(sweep.to_csv())

##########################
# Seed a new community
##########################
runs = run_repetitions(SimConfig(agent_params=result.map_params, n_agents=50), 10)
for regime, aggregate in aggregate_runs(runs).items():
    print(regime.value, aggregate.count, "final interest", aggregate.mean_curve[-1])
