"""Scalar, loop-based port of the vendor driver used as a test oracle.

Works on raw EEPROM words with plain integer bit operations and ``math``,
one pixel at a time, including the driver's integer re-storage of alpha,
Kta and Kv. Nothing here is shared with the package code.
"""

import math

SCALEALPHA = 0.000001


def _s(v, bits):
    return v - (1 << bits) if v >= 1 << (bits - 1) else v


def extract(ee):
    d = {}
    d["kVdd"] = _s((ee[51] & 0xFF00) >> 8, 8) * 32
    d["vdd25"] = (((ee[51] & 0xFF) - 256) << 5) - 8192
    d["KvPTAT"] = _s((ee[50] & 0xFC00) >> 10, 6) / 4096
    d["KtPTAT"] = _s(ee[50] & 0x3FF, 10) / 8
    d["vPTAT25"] = ee[49]
    d["alphaPTAT"] = (ee[16] & 0xF000) / 2**14 + 8
    d["gainEE"] = _s(ee[48], 16)
    d["tgc"] = _s(ee[60] & 0xFF, 8) / 32
    d["resolutionEE"] = (ee[56] & 0x3000) >> 12
    d["KsTa"] = _s((ee[60] & 0xFF00) >> 8, 8) / 8192
    step = ((ee[63] & 0x3000) >> 12) * 10
    ct2 = ((ee[63] & 0xF0) >> 4) * step
    d["ct"] = [-40, 0, ct2, ct2 + ((ee[63] & 0xF00) >> 8) * step]
    kscale = 1 << ((ee[63] & 0xF) + 8)
    d["ksTo"] = [_s(ee[61] & 0xFF, 8) / kscale, _s((ee[61] & 0xFF00) >> 8, 8) / kscale,
                 _s(ee[62] & 0xFF, 8) / kscale, _s((ee[62] & 0xFF00) >> 8, 8) / kscale, -0.0]
    ascale_cp = ((ee[32] & 0xF000) >> 12) + 27
    off0 = _s(ee[58] & 0x3FF, 10)
    off1 = _s((ee[58] & 0xFC00) >> 10, 6) + off0
    a0 = (ee[57] & 0x3FF) / 2**ascale_cp
    a1 = (1 + _s((ee[57] & 0xFC00) >> 10, 6) / 128) * a0
    d["cpAlpha"], d["cpOffset"] = [a0, a1], [off0, off1]
    kta_s1 = ((ee[56] & 0xF0) >> 4) + 8
    kv_s = (ee[56] & 0xF00) >> 8
    d["cpKta"] = _s(ee[59] & 0xFF, 8) / 2**kta_s1
    d["cpKv"] = _s((ee[59] & 0xFF00) >> 8, 8) / 2**kv_s

    def nibbles(start, count):
        out = []
        for i in range(count // 4):
            w = ee[start + i]
            out += [_s((w >> (4 * k)) & 0xF, 4) for k in range(4)]
        return out

    acc_rem, acc_col_s, acc_row_s = ee[32] & 0xF, (ee[32] & 0xF0) >> 4, (ee[32] & 0xF00) >> 8
    alpha_scale = ((ee[32] & 0xF000) >> 12) + 30
    acc_row, acc_col = nibbles(34, 24), nibbles(40, 32)
    occ_rem, occ_col_s, occ_row_s = ee[16] & 0xF, (ee[16] & 0xF0) >> 4, (ee[16] & 0xF00) >> 8
    occ_row, occ_col = nibbles(18, 24), nibbles(24, 32)
    off_ref = _s(ee[17], 16)
    kta_rc = [_s((ee[54] & 0xFF00) >> 8, 8), _s((ee[55] & 0xFF00) >> 8, 8), _s(ee[54] & 0xFF, 8), _s(ee[55] & 0xFF, 8)]
    kta_s2 = ee[56] & 0xF
    kv_t = [_s((ee[52] & 0xF000) >> 12, 4), _s((ee[52] & 0xF0) >> 4, 4), _s((ee[52] & 0xF00) >> 8, 4),
            _s(ee[52] & 0xF, 4)]
    alpha, offset, kta, kv = [], [], [], []
    for p in range(768):
        i, j = divmod(p, 32)
        w = ee[64 + p]
        a = _s((w & 0x3F0) >> 4, 6) * (1 << acc_rem) + ee[33] + (acc_row[i] << acc_row_s) + (acc_col[j] << acc_col_s)
        a = a / 2**alpha_scale - d["tgc"] * (a0 + a1) / 2
        alpha.append(a)
        offset.append(_s((w & 0xFC00) >> 10, 6) * (1 << occ_rem) + off_ref + (occ_row[i] << occ_row_s)
                      + (occ_col[j] << occ_col_s))
        split = 2 * (p // 32 - (p // 64) * 2) + p % 2
        kta.append((_s((w & 0xE) >> 1, 3) * (1 << kta_s2) + kta_rc[split]) / 2**kta_s1)
        kv.append(kv_t[split] / 2**kv_s)
    d["alpha_real"], d["offset"], d["kta_real"], d["kv_real"] = alpha, offset, kta, kv

    # integer re-storage
    temps = [SCALEALPHA / a for a in alpha]
    t, s = max(temps), 0
    while t < 32768:
        t *= 2
        s += 1
    d["alphaScale"], d["alpha"] = s, [int(x * 2**s + 0.5) for x in temps]
    for key, vals in (("kta", kta), ("kv", kv)):
        t, s = max(abs(x) for x in vals), 0
        while t < 64:
            t *= 2
            s += 1
        d[key + "Scale"] = s
        d[key] = [int(x * 2**s - 0.5) if x * 2**s < 0 else int(x * 2**s + 0.5) for x in vals]
    d["calibrationModeEE"] = ((ee[10] & 0x0800) >> 4) ^ 0x80
    d["ilChessC"] = [_s(ee[53] & 0x3F, 6) / 16.0, _s((ee[53] & 0x7C0) >> 6, 5) / 2.0,
                     _s((ee[53] & 0xF800) >> 11, 5) / 8.0]
    d["bad"] = {p for p in range(768) if ee[64 + p] == 0 or ee[64 + p] & 1}
    return d


def calculate_to(d, fd, emissivity, tr=None, restored=True):
    """Object temperatures for every pixel of frame buffer ``fd`` (834 words)."""
    s16 = lambda v: _s(v, 16)  # noqa: E731
    res_corr = 2**d["resolutionEE"] / 2**((fd[832] & 0x0C00) >> 10)
    vdd = (res_corr * s16(fd[810]) - d["vdd25"]) / d["kVdd"] + 3.3
    ptat = s16(fd[800])
    ptat_art = (ptat / (ptat * d["alphaPTAT"] + s16(fd[768]))) * 2**18
    ta = (ptat_art / (1 + d["KvPTAT"] * (vdd - 3.3)) - d["vPTAT25"]) / d["KtPTAT"] + 25
    tr = ta - 8 if tr is None else tr
    ta4 = (ta + 273.15) ** 4
    tr4 = (tr + 273.15) ** 4
    ta_tr = tr4 - (tr4 - ta4) / emissivity
    ks, ct = d["ksTo"], d["ct"]
    corr = [1 / (1 + ks[0] * 40), 1, 1 + ks[1] * ct[2]]
    corr.append(corr[2] * (1 + ks[2] * (ct[3] - ct[2])))
    gain = d["gainEE"] / s16(fd[778])
    mode = (fd[832] & 0x1000) >> 5
    cp = [s16(fd[776]) * gain, s16(fd[808]) * gain]
    comp = (1 + d["cpKta"] * (ta - 25)) * (1 + d["cpKv"] * (vdd - 3.3))
    cp[0] -= d["cpOffset"][0] * comp
    cp[1] -= (d["cpOffset"][1] if mode == d["calibrationModeEE"] else d["cpOffset"][1] + d["ilChessC"][0]) * comp
    out = []
    for p in range(768):
        if p in d["bad"]:
            out.append(-273.15)
            continue
        il = p // 32 - (p // 64) * 2
        conv = ((p + 2) // 4 - (p + 3) // 4 + (p + 1) // 4 - p // 4) * (1 - 2 * il)
        ir = s16(fd[p]) * gain
        if restored:
            kta, kv = d["kta"][p] / 2**d["ktaScale"], d["kv"][p] / 2**d["kvScale"]
            a = SCALEALPHA * 2**d["alphaScale"] / d["alpha"][p]
        else:
            kta, kv, a = d["kta_real"][p], d["kv_real"][p], d["alpha_real"][p]
        ir -= d["offset"][p] * (1 + kta * (ta - 25)) * (1 + kv * (vdd - 3.3))
        if mode != d["calibrationModeEE"]:
            ir += d["ilChessC"][2] * (2 * il - 1) - d["ilChessC"][1] * conv
        ir = (ir - d["tgc"] * cp[fd[833]]) / emissivity
        a *= 1 + d["KsTa"] * (ta - 25)
        sx = math.sqrt(math.sqrt(a * a * a * (ir + a * ta_tr))) * ks[1]
        to = math.sqrt(math.sqrt(ir / (a * (1 - ks[1] * 273.15) + sx) + ta_tr)) - 273.15
        r = 0 if to < ct[1] else 1 if to < ct[2] else 2 if to < ct[3] else 3
        to = math.sqrt(math.sqrt(ir / (a * corr[r] * (1 + ks[r] * (to - ct[r]))) + ta_tr)) - 273.15
        out.append(to)
    return out
