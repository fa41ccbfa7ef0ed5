import numpy as np

from twostage_denoise.network import parameters


def zero_params(obj):
    for t in parameters(obj):
        t.data[...] = 0
    return obj
