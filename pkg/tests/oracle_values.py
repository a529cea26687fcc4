"""Frozen oracle values, produced by gen_oracles.py (mpmath, independent of predmatch).

Levels are ALPHAS; location-scale values are for the standard member theta = (0, 1).
"""

ALPHAS = (0.10, 0.25, 0.50, 0.75, 0.90)

FISHER_AT_0_1 = {
    "location-scale-normal": (1.0, 2.0),
    "location-scale-t(5)": (0.75, 1.25),
    "location-scale-logistic": (0.33333333333333333, 1.4299560445654843),
}

# quantile residual of the prior theta2^-2; the same at every theta
JEFFREYS_QUANTILE_RESIDUAL = {
    "location-scale-normal": (-0.11245508101927221, -0.10716852056393515, 0.0, 0.10716852056393515,
                              0.11245508101927221),
    "location-scale-t(5)": (-0.15147233190477427, -0.16329002879055261, 0.0, 0.16329002879055261,
                            0.15147233190477427),
    "location-scale-logistic": (-0.13829111231202173, -0.14405324199168931, 0.0, 0.14405324199168931,
                                0.13829111231202173),
}

# density threshold of the level-alpha highest density interval, standard member
HPD_THRESHOLD_STANDARD = {
    "location-scale-normal": (0.39580487848761674, 0.37919524230709558, 0.31777657268410693,
                              0.2058535301716436, 0.1031356403753713),
    "location-scale-t(5)": (0.37565523473157835, 0.35491088749779332, 0.28088101185474089,
                            0.15830144651109912, 0.063796798894974722),
    "location-scale-logistic": (0.2475, 0.234375, 0.1875, 0.109375, 0.0475),
}

# N(theta, theta) at theta = 2: derivative of the mass of the fixed HPD interval
XI_NORMAL_MEAN_EQ_VAR_THETA2 = (-0.024868687061281419, -0.060413265413525029, -0.10716852056393515,
                                -0.11840174044058206, -0.084821516069696117)

# N(theta, theta) at theta = 1, Jeffreys prior: quantile residual (depends on alpha)
JEFFREYS_QUANTILE_RESIDUAL_NORMAL_MEAN_EQ_VAR_THETA1 = (-0.005490203345117512, 0.011493281284026293,
                                                        0.044326920044603631, 0.05912373486799747,
                                                        0.044489832663447914)
