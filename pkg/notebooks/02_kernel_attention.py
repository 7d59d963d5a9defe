# %% [markdown]
# # How close is the random-feature attention to softmax?
#
# The all-pair attention uses positive random features, so it is an unbiased
# but noisy estimate of softmax attention. The error shrinks with the number
# of features ``m``.

# %%
import numpy as np
import matplotlib.pyplot as plt

from segqa.autodiff import Tensor, precision
from segqa.model import NodeformerConfig, NodeformerLayer, dense_softmax_attention, kernelized_attention

# %%
with precision(np.float64):
    layer = NodeformerLayer(NodeformerConfig(), 0, np.random.default_rng(0)).eval()
    x = Tensor(np.random.default_rng(1).standard_normal((32, 64)))
    q, k, v = (t.data for t in layer.project(x))
ref = dense_softmax_attention(q, k, v)

# %%
ms = [4, 16, 64, 256, 1024, 4096]
dev = []
with precision(np.float64):
    for m in ms:
        d = [np.abs(kernelized_attention(Tensor(q), Tensor(k), Tensor(v),
                                         np.random.default_rng([7, s]).standard_normal((8, m))).data - ref).mean()
             for s in range(50)]
        dev.append(np.mean(d))
dict(zip(ms, np.round(dev, 4)))

# %% [markdown]
# The deviation falls roughly like ``1/sqrt(m)``. On raw unit-variance
# queries and keys (larger norms than a freshly initialised layer produces)
# the feature weights are heavier tailed and the same curve sits several
# times higher.

# %%
plt.loglog(ms, dev, "o-", label="measured")
plt.loglog(ms, dev[0] * np.sqrt(ms[0] / np.array(ms)), "--", label="1/sqrt(m)")
plt.xlabel("random features m")
plt.ylabel("mean |kernel - softmax|")
plt.legend()
plt.savefig("attention_convergence.png")
