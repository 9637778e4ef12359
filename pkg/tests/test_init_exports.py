def test_exports():
    import avlab

    assert hasattr(avlab, "__version__")
    assert hasattr(avlab, "HOME_DIR")
    assert hasattr(avlab, "Run")
    assert hasattr(avlab, "DualTowerModel")
    assert hasattr(avlab, "ModelConfig")
    assert hasattr(avlab, "ConditionSet")
    assert hasattr(avlab, "GuidanceScales")
    assert hasattr(avlab, "TrainConfig")
    assert hasattr(avlab, "SampleConfig")
    assert hasattr(avlab, "train")
    assert hasattr(avlab, "sample")
    assert hasattr(avlab, "Lab")
    assert hasattr(avlab, "lab")
    assert issubclass(avlab.ContractError, avlab.AvlabError)
    assert set(avlab.__all__) <= set(dir(avlab))
