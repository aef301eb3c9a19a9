def pytest_addoption(parser):
    parser.addoption(
        "--mnist-dir",
        action="store",
        default=None,
        help="directory holding the real MNIST IDX files (enables the full-set loader test)",
    )
