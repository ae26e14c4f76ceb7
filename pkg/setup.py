from setuptools import setup

setup(
    name='optslide',
    version='0.0.0',
    package_dir={'': 'src'},
    packages=['optslide', 'optslide.harness'],
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.22',
        'scipy>=1.8',
        'pydantic>=2',
        'loguru',
    ],
    entry_points={
        'console_scripts': ['optslide=optslide.harness.cli:main'],
    },
)
