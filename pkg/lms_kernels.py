#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""Compiled inner loops for the adaptive equalizer"""

import numpy as np
from numba import njit


@njit(cache=True)
def nlms_train(yx, yp, dx, dp, positions, num_taps, mu, passes, taps):
    """
    Data-aided NLMS over the training positions of a 2x2 real MIMO filter.

    taps has shape (2, 2*num_taps): row 0 produces the I output, row 1 the Q
    output; columns hold the taps on yx then the taps on yp. Updated in place
    and returned along with the final-pass squared errors.
    """
    half = num_taps // 2
    n = yx.shape[0]
    width = 2 * num_taps
    u = np.zeros(width)
    sq_err = np.zeros(positions.shape[0])

    for _ in range(passes):
        for i in range(positions.shape[0]):
            k = positions[i]
            norm = 1e-12
            for m in range(num_taps):
                j = k + m - half
                if 0 <= j < n:
                    u[m] = yx[j]
                    u[num_taps + m] = yp[j]
                else:
                    u[m] = 0.0
                    u[num_taps + m] = 0.0
                norm += u[m] * u[m] + u[num_taps + m] * u[num_taps + m]

            out_x = 0.0
            out_p = 0.0
            for m in range(width):
                out_x += taps[0, m] * u[m]
                out_p += taps[1, m] * u[m]
            ex = dx[k] - out_x
            ep = dp[k] - out_p

            step = mu / norm
            for m in range(width):
                taps[0, m] += step * ex * u[m]
                taps[1, m] += step * ep * u[m]
            sq_err[i] = ex * ex + ep * ep

    return taps, sq_err
