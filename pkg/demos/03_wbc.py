"""Breast cancer diagnosis from nine cytology scores.

Fits a 3-dimensional subspace on a stratified two thirds of the Wisconsin
data, classifies the remaining third by posterior-predictive averaging and
compares with a tuned KNN.  Pass a seed on the command line to try another
split; a full-length chain takes roughly half a minute.
"""
import sys

from psc.baselines import knn_sweep
from psc.data import SplitSpec, load_wbc, split, standardize
from psc.estimator import estimate_from_chain, feature_importance, format_table
from psc.evaluate import evaluate, format_report, posterior_predict
from psc.gibbs import SamplerConfig, run_chain

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
data = load_wbc()
train, test = split(data, SplitSpec(test_fraction=1 / 3, seed=seed))
# all nine scores share the 1..10 scale, so centering is enough
train, transform = standardize(train, mode="center")
test, _ = standardize(test, transform)

chain = run_chain(train, 3, sampler_cfg=SamplerConfig(iterations=5000, burn_in=1000, seed=seed))
rep = evaluate(posterior_predict(chain, test), test.y)
print(format_report(rep), end="")

knn_k, knn_err, _ = knn_sweep(train, test)
print(f"KNN with k={knn_k}: error {knn_err:.4f}")

est = estimate_from_chain(chain)
print(f"\nestimated dimension {est.k_hat}; feature scores:")
print(format_table(feature_importance(est, train.feature_names)), end="")
