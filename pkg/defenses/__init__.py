from defenses import diffpure, jpeg_like, resample, tvm
from defenses.base import DefenseContext, DefenseFactory, no_defense


def register_builtin_defenses():
    DefenseFactory.register("none", no_defense)
    DefenseFactory.register("jpeg_like", jpeg_like.run)
    DefenseFactory.register("tvm", tvm.run)
    DefenseFactory.register("resample", resample.run)
    DefenseFactory.register("diffpure", diffpure.run)


register_builtin_defenses()

__all__ = ["DefenseContext", "DefenseFactory", "register_builtin_defenses"]
