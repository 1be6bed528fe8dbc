# setup.py

from setuptools import find_packages, setup

setup(
    name='gradvac-toolkit',
    version='0.1.0',
    description='Gradient Vaccine and PCGrad gradient surgery with a synthetic '
                'multi-task harness and gradient-similarity analysis',
    packages=find_packages(include=['core', 'analyzers', 'planner', 'suite']),
    py_modules=['main'],
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.17',
        'PyYAML>=5.1',
    ],
    extras_require={
        'test': ['pytest>=7.0'],
    },
    entry_points={
        'console_scripts': [
            'gradvac=main:main',
        ],
    },
)
