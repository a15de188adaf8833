"""Independent loop-level reference implementations used as test oracles."""

import math

import numpy as np


# -- graph disentangled module ---------------------------------------------------

def build_nodes_oracle(z, Wu, Wv, J, C):
    U = np.zeros((J, C))
    V = np.zeros((J, C))
    for j in range(J):
        for c in range(C):
            row = j * C + c
            U[j, c] = sum(Wu[row, h] * z[h] for h in range(len(z)))
            V[j, c] = sum(Wv[row, h] * z[h] for h in range(len(z)))
    return U, V


def hmrr_oracle(u, v, Wattr):
    C = len(u)
    uv = list(u) + list(v)
    pre = [max(0.0, sum(Wattr[d, k] * uv[k] for k in range(2 * C))) for d in range(Wattr.shape[0])]
    norm = math.sqrt(sum(p * p for p in pre))
    D = len(pre)
    if norm <= 1e-12:
        return [1.0 / D] * D
    support = [d for d in range(D) if pre[d] != 0.0]
    top = max(pre[d] / norm for d in support)
    e = {d: math.exp(pre[d] / norm - top) for d in support}
    total = sum(e.values())
    return [e[d] / total if d in e else 0.0 for d in range(D)]


def extract_oracle(U, V, R, conv_w, conv_b, read_w, read_b):
    J, C = U.shape
    D = R.shape[-1]
    K = conv_w.shape[0]
    f = np.zeros(D)
    for d in range(D):
        acc = 0.0
        for i in range(J):
            for j in range(J):
                score = 0.0
                for c in range(C):
                    row = (U[i, c], R[i, j, d], V[j, c])
                    for k in range(K):
                        a = conv_w[k, 0] * row[0] + conv_w[k, 1] * row[1] + conv_w[k, 2] * row[2] + conv_b[k]
                        score += read_w[c * K + k] * max(0.0, a)
                acc += score
        f[d] = max(0.0, acc / (J * J) + read_b[0])
    return f



# -- code generation module -------------------------------------------------------

def attention_oracle(g, WQ, WK):
    H, F = WQ.shape[0], WK.shape[0]
    q = [sum(WQ[a, h] * g[h] for h in range(len(g))) for a in range(H)]
    k = [sum(WK[b, h] * g[h] for h in range(len(g))) for b in range(F)]
    return [[k[b] * q[a] for a in range(H)] for b in range(F)]


def rownorm_oracle(M, H):
    out = []
    for row in M:
        x = [v / math.sqrt(H) for v in row]
        top = max(x)
        e = [math.exp(v - top) for v in x]
        s = sum(e)
        out.append([v / s for v in e])
    return out


def two_step_oracle(g1, g2, WQ, WK, Wt1):
    """T^2 by hand: carried block T^1 Wt1^T next to the layer-2 attention."""
    H, F = WQ.shape[0], WK.shape[0]
    T1 = rownorm_oracle(attention_oracle(g1, WQ, WK), H)
    carried = [[sum(T1[r][h] * Wt1[c, h] for h in range(H)) for c in range(F)] for r in range(F)]
    A2 = attention_oracle(g2, WQ, WK)
    return np.array(rownorm_oracle([carried[r] + A2[r] for r in range(F)], H))


def code_oracle(T, x):
    return np.array([max(0.0, sum(T[r, k] * x[k] for k in range(len(x)))) for r in range(T.shape[0])])



def conv_oracle(x, W, b, stride, pad):
    cin, r, _ = x.shape
    cout = W.shape[0]
    xp = np.zeros((cin, r + 2 * pad, r + 2 * pad))
    xp[:, pad:pad + r, pad:pad + r] = x
    size = (r + 2 * pad - 3) // stride + 1
    out = np.zeros((cout, size, size))
    for o in range(cout):
        for i in range(size):
            for j in range(size):
                acc = b[o]
                for c in range(cin):
                    for u in range(3):
                        for v in range(3):
                            acc += W[o, c, u, v] * xp[c, i * stride + u, j * stride + v]
                out[o, i, j] = acc
    return out


# -- prior and objective ------------------------------------------------------------

def leaky(x, slope=0.2):
    return np.where(x > 0, x, slope * x)


def discriminate_oracle(img, disc):
    n_conv = sum(1 for k in disc if k.startswith("disc.conv") and k.endswith(".W"))
    x = img
    for i in range(n_conv):
        x = leaky(conv_oracle(x, disc[f"disc.conv{i}.W"], disc[f"disc.conv{i}.b"], 2, 1))
    flat = x.reshape(-1)
    W, b = disc["disc.fc.W"], disc["disc.fc.b"]
    logit = b[0] + sum(W[0, k] * flat[k] for k in range(len(flat)))
    logit = min(30.0, max(-30.0, logit))
    return 1.0 / (1.0 + math.exp(-logit))


def perceptual_oracle(img, phi):
    x = leaky(conv_oracle(img, phi["phi.conv1.W"], phi["phi.conv1.b"], 1, 1))
    return leaky(conv_oracle(x, phi["phi.conv2.W"], phi["phi.conv2.b"], 1, 1))


def total_loss_oracle(sr, hr, phi, disc, alpha, beta):
    B = sr.shape[0]
    se, count = 0.0, 0
    for v_sr, v_hr in zip(sr.ravel(), hr.ravel()):
        se += (v_sr - v_hr) ** 2
        count += 1
    l_mse = se / count
    pe, pcount = 0.0, 0
    for b in range(B):
        fa, fb = perceptual_oracle(sr[b], phi), perceptual_oracle(hr[b], phi)
        for va, vb in zip(fa.ravel(), fb.ravel()):
            pe += (va - vb) ** 2
            pcount += 1
    l_per = pe / pcount
    total = l_mse + alpha * l_per
    l_adv = 0.0
    if beta != 0 and disc is not None:
        l_adv = sum(math.log(max(1.0 - discriminate_oracle(sr[b], disc), 1e-12)) for b in range(B)) / B
        total += beta * l_adv
    return {"l_mse": l_mse, "l_per": l_per, "l_adv": l_adv, "total": total}


def adam_oracle(p, grads, lr=1e-4, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar-by-scalar Adam over a sequence of gradient arrays; returns the final parameters."""
    p = np.array(p, dtype=float)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        for i in range(p.size):
            gi = g.flat[i]
            m.flat[i] = b1 * m.flat[i] + (1 - b1) * gi
            v.flat[i] = b2 * v.flat[i] + (1 - b2) * gi * gi
            mhat = m.flat[i] / (1 - b1 ** t)
            vhat = v.flat[i] / (1 - b2 ** t)
            p.flat[i] = p.flat[i] - lr * mhat / (math.sqrt(vhat) + eps)
    return p
