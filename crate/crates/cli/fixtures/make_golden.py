"""Dense Hessian of the tiny fixture's risk with jax in float64.

Parameters are flattened layer by layer as W (row-major, out x in) then b,
matching the parameter files. Run from this directory.
"""
import json

import jax
import jax.numpy as jnp

jax.config.update("jax_enable_x64", True)

params = json.load(open("tiny_params.json"))["params"]
data = json.load(open("tiny_data.json"))
x = jnp.array(data["x"], dtype=jnp.float64)
y = jnp.array(data["y"], dtype=jnp.float64)
shapes = [jnp.array(p, dtype=jnp.float64).shape for p in params]
theta0 = jnp.concatenate([jnp.array(p, dtype=jnp.float64).ravel() for p in params])


def unflatten(theta):
    out, i = [], 0
    for s in shapes:
        n = 1
        for d in s:
            n *= d
        out.append(theta[i:i + n].reshape(s))
        i += n
    return out


def risk(theta):
    w1, b1, w2, b2 = unflatten(theta)
    h = jnp.tanh(x @ w1.T + b1)
    f = h @ w2.T + b2
    return jnp.mean(jnp.sum((f - y) ** 2, axis=1))


hess = jax.hessian(risk)(theta0)
json.dump(
    {"dim": int(theta0.size), "matrix": [[float(v) for v in row] for row in hess]},
    open("tiny_hessian_golden.json", "w"),
    indent=1,
)
print(hess.shape)
