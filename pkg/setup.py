import setuptools

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setuptools.setup(
    name="swarm-planner",
    version="0.1.0",
    author="Nitin Manral",
    author_email="",
    description="Safe trajectory planning for quadrotor swarms in obstacle environments",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license='MIT',
    packages=['swarm_planner'],
    include_package_data=True,
    python_requires='>=3.8',
    install_requires=['numpy>=1.22',
                      'scipy>=1.8',
                      'cvxpy>=1.4',
                      'osqp>=0.6.2',
                      'pandas>=1.4',
                      'pyyaml'],
    extras_require={'test': ['pytest']},
    entry_points={
        'console_scripts': ['swarm-planner=swarm_planner.main:main'],
    },
)
