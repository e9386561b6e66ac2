# Layer-by-layer FLOPs of the default networks, summed by hand from the
# layer tables. Regenerate the fixture with
#   python3 flops_default.py > flops_default.json

import json

def conv(ci, co, k, ho, wo):
    return 2 * ho * wo * (ci * k * k + 1) * co

def bn(c, h, w):
    return 2 * h * w * c

def act(c, h, w):
    return h * w * c

def up(c, h, w):
    return 11 * h * w * c

def segnet(H, W, b=32, dec=64, feat=32, k=4):
    t = 0
    h, w, c = H, W, 3
    for co, s in [(b, 2), (b, 2), (2 * b, 2), (4 * b, 2), (4 * b, 2), (4 * b, 1)]:
        h, w = h // s, w // s
        t += conv(c, co, 3, h, w) + bn(co, h, w) + act(co, h, w)
        c = co
        if co == b and h == H // 4:
            low = (c, h, w)
    lh, lw = H // 4, W // 4
    t += up(c, lh, lw)
    c = c + b
    for co in [dec, feat]:
        t += conv(c, co, 3, lh, lw) + bn(co, lh, lw) + act(co, lh, lw)
        c = co
    t += conv(c, k, 1, lh, lw)
    return t

def flownet(H, W, f=16):
    t = 0
    h, w, c = H, W, 6
    for co in [f, 2 * f, 4 * f, 4 * f]:
        h, w = h // 2, w // 2
        t += conv(c, co, 3, h, w) + act(co, h, w)
        c = co
    for co in [2 * f, f]:
        h, w = h * 2, w * 2
        t += conv(c, co, 4, h, w) + act(co, h, w)
        c = co
    c = f + 2 * f
    t += conv(c, 2, 3, h, w)
    t += up(2, H, W)
    return t

def dmnet(H, W, d=16):
    t = 0
    h, w, c = H, W, 3
    for i, s in enumerate([2, 2, 1, 1]):
        h, w = h // s, w // s
        t += c * conv(1, 1, 3, h, w) + 2 * h * w * (c + 1) * d
        c = d
        if i < 3:
            t += bn(d, h, w) + act(d, h, w)
    return t

def cfnet(H, W, c0=16, feat=32):
    t = 0
    h, w, c = H, W, 3
    widths = {}
    for l in range(1, 11):
        s = 2 if l in (1, 2, 4, 6, 8, 10) else 1
        co = c0 if l == 1 else 2 * c0
        h, w = h // s, w // s
        t += conv(c, co, 3, h, w) + bn(co, h, w) + act(co, h, w)
        c = co
        widths[l] = co
    for skip in (9, 7, 5):
        h, w = h * 2, w * 2
        t += conv(c, c0, 4, h, w) + act(c0, h, w)
        c = c0 + widths[skip]
    h, w = h * 2, w * 2
    t += conv(c, feat, 4, h, w)
    return t

out = {}
for (H, W) in [(64, 64), (128, 128)]:
    out[f"{H}x{W}"] = {
        "segnet": segnet(H, W),
        "flownet": flownet(H, W),
        "dmnet": dmnet(H, W),
        "cfnet": cfnet(H, W),
    }
print(json.dumps(out, indent=2))
